//! M-Attack: joint gradient attack on numerical and categorical features.
//!
//! Numerical features move by l1 steepest-ascent steps and are projected back
//! onto the ε₁ l1 ball around the clean sample. Each categorical feature is
//! replaced by a categorical distribution π_i that is optimized through
//! Gumbel-softmax samples; a hinged cross-entropy term keeps π close to the
//! clean categories. The final example is the best of several hard samples
//! drawn from π, the mode of π and the clean categories, all within the l0
//! budget ε₂.
//!
//! The maximized objective is
//!
//! ```text
//! Q(x′_n, π) = E_{x′_c ~ π}[ L(F(x′_n, x′_c), y) − λ·D(x′, x) ] − α·[Σ_i −log π_i[x_c^i] − ζ]⁺
//! ```
//!
//! where `D` is the mixed Mahalanobis distance (λ = 0 drops it).

use std::time::Instant;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureLayout;
use crate::error::{Error, Result};
use crate::mahalanobis::GeneralizedCovariance;
use crate::model::MlpClassifier;
use crate::numerics::{argmax, l1_norm, l1_steepest_step, project_l1_ball, project_simplex, softmax};

/// Logits are kept within `±LOGIT_CLAMP`.
pub const LOGIT_CLAMP: f64 = 30.0;
/// Probability assigned to the clean category at initialization.
pub const INIT_CONFIDENCE: f64 = 1.0 - 1e-3;
/// Lower clamp on π inside the cross-entropy log.
pub const CE_PROB_FLOOR: f64 = 1e-6;
/// Smallest probability kept after a probability-space update.
pub const PI_FLOOR: f64 = 1e-6;

/// Read-only pieces every attack needs.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub model: &'a MlpClassifier,
    pub layout: &'a FeatureLayout,
    pub maha: Option<&'a GeneralizedCovariance>,
}

impl<'a> AttackContext<'a> {
    pub fn new(
        model: &'a MlpClassifier,
        layout: &'a FeatureLayout,
        maha: Option<&'a GeneralizedCovariance>,
    ) -> Self {
        AttackContext { model, layout, maha }
    }

    pub(crate) fn check(&self, x: &[f64], y: usize, lambda: f64) -> Result<()> {
        if self.model.input_dim() != self.layout.width {
            return Err(Error::usage(format!(
                "model input width {} does not match encoded width {}",
                self.model.input_dim(),
                self.layout.width
            )));
        }
        if x.len() != self.layout.width {
            return Err(Error::usage(format!(
                "sample width {} does not match encoded width {}",
                x.len(),
                self.layout.width
            )));
        }
        if y >= self.model.num_classes() {
            return Err(Error::usage(format!("label {y} out of range")));
        }
        if let Some(m) = self.maha {
            if m.dim() != self.layout.width {
                return Err(Error::usage("covariance width does not match encoded width"));
            }
        }
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::usage(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if lambda > 0.0 && self.maha.is_none() {
            return Err(Error::usage("lambda > 0 requires a fitted covariance"));
        }
        Ok(())
    }
}

/// `L(F(x′), y) − λ·D(x′, x)` at one point.
#[derive(Debug, Clone)]
pub struct PenalizedEval {
    pub value: f64,
    pub loss: f64,
    /// `None` when no covariance is available.
    pub distance: Option<f64>,
    pub grad: Vec<f64>,
}

/// Loss minus λ-weighted Mahalanobis distance, with its gradient in `x_adv`.
///
/// Shared by M-Attack and the baselines so their numerical trajectories are
/// computed by identical floating-point operations.
pub fn penalized_objective(
    ctx: &AttackContext<'_>,
    x_adv: &[f64],
    x_clean: &[f64],
    y: usize,
    lambda: f64,
) -> PenalizedEval {
    let (loss, mut grad) = ctx.model.loss_and_input_grad(x_adv, y);
    let mut value = loss;
    let mut distance = None;
    if let Some(maha) = ctx.maha {
        let (d, gd) = maha.m_distance(x_adv, x_clean);
        distance = Some(d);
        if lambda != 0.0 {
            value -= lambda * d;
            for (g, h) in grad.iter_mut().zip(&gd) {
                *g -= lambda * h;
            }
        }
    }
    PenalizedEval {
        value,
        loss,
        distance,
        grad,
    }
}

/// Value only; skips the input gradient.
pub fn penalized_value(
    ctx: &AttackContext<'_>,
    x_adv: &[f64],
    x_clean: &[f64],
    y: usize,
    lambda: f64,
) -> (f64, f64, Option<f64>) {
    let loss = ctx.model.loss(x_adv, y);
    match ctx.maha {
        Some(m) => {
            let d = m.m_distance_value(x_adv, x_clean);
            let value = if lambda != 0.0 { loss - lambda * d } else { loss };
            (value, loss, Some(d))
        }
        None => (loss, loss, None),
    }
}

/// Per-feature categorical distributions, parameterized by logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDistribution {
    pub logits: Vec<Vec<f64>>,
}

impl CategoricalDistribution {
    /// Puts probability `confidence` on each given category and spreads the
    /// rest uniformly.
    pub fn concentrated(categories: &[usize], sizes: &[usize], confidence: f64) -> Self {
        let logits = categories
            .iter()
            .zip(sizes)
            .map(|(&c, &k)| {
                let rest = ((1.0 - confidence) / (k - 1) as f64).ln();
                let mut l = vec![rest; k];
                l[c] = confidence.ln();
                l
            })
            .collect();
        CategoricalDistribution { logits }
    }

    pub fn from_logits(logits: Vec<Vec<f64>>) -> Self {
        CategoricalDistribution { logits }
    }

    pub fn num_features(&self) -> usize {
        self.logits.len()
    }

    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.logits.iter().map(|l| softmax(l)).collect()
    }

    pub fn clamp_logits(&mut self) {
        for l in self.logits.iter_mut().flatten() {
            *l = l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        }
    }
}

/// `Σ_i −log max(π_i[x_c^i], 1e-6)` before the hinge.
fn ce_sum(probs: &[Vec<f64>], clean: &[usize]) -> f64 {
    probs
        .iter()
        .zip(clean)
        .map(|(p, &c)| -p[c].max(CE_PROB_FLOOR).ln())
        .sum()
}

/// Hinged cross-entropy surrogate of the l0 budget:
/// `[Σ_i −log π_i[x_c^i] − ζ]⁺`.
pub fn ce_surrogate(pi: &CategoricalDistribution, clean: &[usize], zeta: f64) -> f64 {
    (ce_sum(&pi.probabilities(), clean) - zeta).max(0.0)
}

/// Gradient of [`ce_surrogate`] with respect to the logits (zero where the
/// hinge is inactive).
pub fn ce_surrogate_grad(pi: &CategoricalDistribution, clean: &[usize], zeta: f64) -> Vec<Vec<f64>> {
    let probs = pi.probabilities();
    let active = ce_sum(&probs, clean) > zeta;
    probs
        .into_iter()
        .zip(clean)
        .map(|(mut p, &c)| {
            if !active || p[c] < CE_PROB_FLOOR {
                p.iter_mut().for_each(|v| *v = 0.0);
            } else {
                p[c] -= 1.0;
            }
            p
        })
        .collect()
}

/// One draw of standard Gumbel noise per category.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelNoise {
    pub values: Vec<Vec<f64>>,
}

impl GumbelNoise {
    pub fn sample<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let values = sizes
            .iter()
            .map(|&k| {
                (0..k)
                    .map(|_| {
                        let u: f64 = rng.sample(Open01);
                        -(-u.ln()).ln()
                    })
                    .collect()
            })
            .collect();
        GumbelNoise { values }
    }
}

/// Relaxed blocks `softmax((logits + g)/τ)` with their hard argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    pub relaxed: Vec<Vec<f64>>,
    pub hard: Vec<usize>,
}

impl GumbelSample {
    pub fn from_noise(pi: &CategoricalDistribution, noise: &GumbelNoise, tau: f64) -> Self {
        let relaxed: Vec<Vec<f64>> = pi
            .logits
            .iter()
            .zip(&noise.values)
            .map(|(l, g)| {
                let z: Vec<f64> = l.iter().zip(g).map(|(a, b)| (a + b) / tau).collect();
                softmax(&z)
            })
            .collect();
        let hard = pi
            .logits
            .iter()
            .zip(&noise.values)
            .map(|(l, g)| {
                let z: Vec<f64> = l.iter().zip(g).map(|(a, b)| a + b).collect();
                argmax(&z)
            })
            .collect();
        GumbelSample { relaxed, hard }
    }
}

/// Draws one Gumbel-softmax sample. The hard index is the Gumbel-max sample
/// of π; the relaxed block carries gradients.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    pi: &CategoricalDistribution,
    tau: f64,
    rng: &mut R,
) -> GumbelSample {
    let sizes: Vec<usize> = pi.logits.iter().map(Vec::len).collect();
    GumbelSample::from_noise(pi, &GumbelNoise::sample(&sizes, rng), tau)
}

/// How the categorical part enters the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientEstimator {
    /// Hard one-hot forward, gradient through the relaxed sample.
    StraightThrough,
    /// Relaxed sample in both passes; smooth in the logits.
    Relaxed,
}

/// How the ascent step on π is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CategoricalUpdate {
    /// `π ← Proj_simplex(π + γ·∇_π Q)`, logits re-derived as `ln π`.
    Probability,
    /// `logits ← clamp(logits + γ·∇_logits Q)`.
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// l1 budget on standardized numerics.
    pub epsilon1: f64,
    /// Maximum number of changed categorical features.
    pub epsilon2: usize,
    /// Mahalanobis penalty weight.
    pub lambda: f64,
    /// Weight of the cross-entropy surrogate.
    pub alpha_ce: f64,
    /// Hinge threshold; `None` means `ε₂·ln 2`.
    pub zeta: Option<f64>,
    /// l1 step length for numerics; `None` means `ε₁/10`.
    pub step_num: Option<f64>,
    /// Coordinates sharing each numerical step (1 = exact steepest ascent).
    pub step_coords: usize,
    /// Step size for π.
    pub gamma: f64,
    pub steps: usize,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    pub mc_samples: usize,
    pub final_samples: usize,
    pub estimator: GradientEstimator,
    pub categorical_update: CategoricalUpdate,
    /// Pin every categorical feature to its clean value.
    pub freeze_categoricals: bool,
    pub record_trace: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon1: 0.6,
            epsilon2: 3,
            lambda: 0.0,
            alpha_ce: 0.3,
            zeta: None,
            step_num: None,
            step_coords: 1,
            gamma: 0.1,
            steps: 200,
            tau: 0.5,
            mc_samples: 4,
            final_samples: 32,
            estimator: GradientEstimator::StraightThrough,
            categorical_update: CategoricalUpdate::Probability,
            freeze_categoricals: false,
            record_trace: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn zeta(&self) -> f64 {
        self.zeta
            .unwrap_or(self.epsilon2 as f64 * std::f64::consts::LN_2)
    }

    pub fn step_num(&self) -> f64 {
        self.step_num.unwrap_or(self.epsilon1 / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon1 > 0.0) || !self.epsilon1.is_finite() {
            return Err(Error::usage(format!("epsilon1 must be > 0, got {}", self.epsilon1)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::usage(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.step_num() > 0.0) {
            return Err(Error::usage("step_num must be > 0"));
        }
        if self.gamma < 0.0 || self.alpha_ce < 0.0 || self.zeta() < 0.0 {
            return Err(Error::usage("gamma, alpha_ce and zeta must be >= 0"));
        }
        if self.mc_samples == 0 || self.final_samples == 0 || self.step_coords == 0 {
            return Err(Error::usage("mc_samples, final_samples and step_coords must be >= 1"));
        }
        Ok(())
    }
}

/// `Q` and its gradients at one point.
#[derive(Debug, Clone)]
pub struct QEvaluation {
    pub q: f64,
    /// Mean model loss over the Monte-Carlo samples.
    pub loss: f64,
    /// Hinged cross-entropy surrogate.
    pub ce: f64,
    /// Mean Mahalanobis distance (0 without a covariance).
    pub distance: f64,
    pub grad_num: Vec<f64>,
    pub grad_logits: Vec<Vec<f64>>,
    /// Straight-through gradient with respect to π: the mean input gradient
    /// on each one-hot block, the exact curvature of the distance penalty
    /// for a category swap, and the cross-entropy term.
    pub grad_pi: Vec<Vec<f64>>,
}

/// Whether the categorical part is stochastic for this context and config.
fn categoricals_active(ctx: &AttackContext<'_>, config: &AttackConfig) -> bool {
    !config.freeze_categoricals && ctx.layout.num_categorical() > 0
}

/// Evaluates `Q` with the given (frozen) Gumbel noise, one Monte-Carlo term
/// per noise draw.
///
/// With frozen or absent categoricals, the categorical part is the clean
/// one-hot encoding and a single evaluation is made regardless of the number
/// of noise draws.
pub fn objective_q(
    ctx: &AttackContext<'_>,
    x_clean: &[f64],
    y: usize,
    x_num: &[f64],
    pi: &CategoricalDistribution,
    noises: &[GumbelNoise],
    config: &AttackConfig,
) -> Result<QEvaluation> {
    let layout = ctx.layout;
    let d_n = layout.num_numerical;
    let clean_cats = layout.categories_of(x_clean);
    let zeta = config.zeta();
    let mut x_adv = x_clean.to_vec();
    x_adv[..d_n].copy_from_slice(x_num);

    let mut eval = if !categoricals_active(ctx, config) {
        let p = penalized_objective(ctx, &x_adv, x_clean, y, config.lambda);
        QEvaluation {
            q: p.value,
            loss: p.loss,
            ce: 0.0,
            distance: p.distance.unwrap_or(0.0),
            grad_num: p.grad[..d_n].to_vec(),
            grad_logits: pi.logits.iter().map(|l| vec![0.0; l.len()]).collect(),
            grad_pi: pi.logits.iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    } else {
        if noises.is_empty() {
            return Err(Error::usage("objective_q needs at least one noise draw"));
        }
        let mut q = 0.0;
        let mut loss = 0.0;
        let mut distance = 0.0;
        let mut grad_num = vec![0.0; d_n];
        let mut grad_logits: Vec<Vec<f64>> = pi.logits.iter().map(|l| vec![0.0; l.len()]).collect();
        let mut grad_pi = grad_logits.clone();
        for noise in noises {
            let sample = GumbelSample::from_noise(pi, noise, config.tau);
            for (b, (relaxed, &hard)) in layout.blocks.iter().zip(sample.relaxed.iter().zip(&sample.hard)) {
                let block = &mut x_adv[b.range()];
                match config.estimator {
                    GradientEstimator::StraightThrough => {
                        block.iter_mut().for_each(|v| *v = 0.0);
                        block[hard] = 1.0;
                    }
                    GradientEstimator::Relaxed => block.copy_from_slice(relaxed),
                }
            }
            let p = penalized_objective(ctx, &x_adv, x_clean, y, config.lambda);
            q += p.value;
            loss += p.loss;
            distance += p.distance.unwrap_or(0.0);
            for (g, v) in grad_num.iter_mut().zip(&p.grad[..d_n]) {
                *g += v;
            }
            for (((b, r), gl), gp) in layout
                .blocks
                .iter()
                .zip(&sample.relaxed)
                .zip(grad_logits.iter_mut())
                .zip(grad_pi.iter_mut())
            {
                let u = &p.grad[b.range()];
                for (a, v) in gp.iter_mut().zip(u) {
                    *a += v;
                }
                if let (Some(m), true) = (ctx.maha, config.lambda != 0.0) {
                    // Curvature of D along e_l − e_h, up to a constant in l.
                    let pinv = m.pseudo_inverse();
                    let h = b.offset + argmax(&x_adv[b.range()]);
                    for (k, a) in gp.iter_mut().enumerate() {
                        let l = b.offset + k;
                        *a -= config.lambda * (pinv[(l, l)] - 2.0 * pinv[(l, h)]);
                    }
                }
                let mean_u: f64 = r.iter().zip(u).map(|(a, b)| a * b).sum();
                for l in 0..r.len() {
                    gl[l] += r[l] * (u[l] - mean_u) / config.tau;
                }
            }
        }
        let m = noises.len() as f64;
        grad_num.iter_mut().for_each(|g| *g /= m);
        grad_logits.iter_mut().flatten().for_each(|g| *g /= m);
        grad_pi.iter_mut().flatten().for_each(|g| *g /= m);
        QEvaluation {
            q: q / m,
            loss: loss / m,
            ce: 0.0,
            distance: distance / m,
            grad_num,
            grad_logits,
            grad_pi,
        }
    };

    if categoricals_active(ctx, config) && config.alpha_ce != 0.0 {
        let ce = ce_surrogate(pi, &clean_cats, zeta);
        eval.ce = ce;
        eval.q -= config.alpha_ce * ce;
        if ce > 0.0 {
            let g = ce_surrogate_grad(pi, &clean_cats, zeta);
            for (gl, gc) in eval.grad_logits.iter_mut().zip(&g) {
                for (a, b) in gl.iter_mut().zip(gc) {
                    *a -= config.alpha_ce * b;
                }
            }
            for ((gp, l), &c) in eval.grad_pi.iter_mut().zip(&pi.logits).zip(&clean_cats) {
                let pc = softmax(l)[c];
                if pc >= CE_PROB_FLOOR {
                    gp[c] += config.alpha_ce / pc;
                }
            }
        }
    }

    if !eval.q.is_finite() {
        return Err(Error::numeric(format!(
            "objective is non-finite (loss {}, distance {}, ce {})",
            eval.loss, eval.distance, eval.ce
        )));
    }
    Ok(eval)
}

/// One ascent step on π.
fn update_distribution(pi: &mut CategoricalDistribution, eval: &QEvaluation, config: &AttackConfig) -> Result<()> {
    match config.categorical_update {
        CategoricalUpdate::Logit => {
            for (l, g) in pi.logits.iter_mut().zip(&eval.grad_logits) {
                for (a, b) in l.iter_mut().zip(g) {
                    *a += config.gamma * b;
                }
            }
        }
        CategoricalUpdate::Probability => {
            for (l, g) in pi.logits.iter_mut().zip(&eval.grad_pi) {
                let p = softmax(l);
                // Centered gradient scaled so no entry moves by more than γ.
                let mean = g.iter().sum::<f64>() / g.len() as f64;
                let scale = g.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
                if scale == 0.0 {
                    continue;
                }
                let stepped: Vec<f64> = p
                    .iter()
                    .zip(g)
                    .map(|(&pj, &gj)| pj + config.gamma * (gj - mean) / scale)
                    .collect();
                let mut q = project_simplex(&stepped)?;
                q.iter_mut().for_each(|v| *v = v.max(PI_FLOOR));
                let s: f64 = q.iter().sum();
                for (a, v) in l.iter_mut().zip(&q) {
                    *a = (v / s).ln();
                }
            }
        }
    }
    pi.clamp_logits();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub q: f64,
    pub loss: f64,
    pub ce: f64,
    pub distance: f64,
    /// Standardized numerics after the projection of this step.
    pub numerics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    /// Adversarial numerics in standardized units.
    pub adv_numerics: Vec<f64>,
    pub adv_categoricals: Vec<usize>,
    pub label: usize,
    pub predicted: usize,
    pub loss: f64,
    /// `L − λ·D` at the returned example.
    pub objective: f64,
    pub m_distance: Option<f64>,
    pub l1_num_perturbation: f64,
    pub l0_cat_changes: usize,
    /// The model misclassifies the returned example.
    pub success: bool,
    /// Filled by the harness when a detector is available.
    pub flagged_ood: Option<bool>,
    pub wall_time_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<Vec<StepTrace>>,
}

impl AttackResult {
    /// Encoded adversarial vector.
    pub fn dense(&self, layout: &FeatureLayout) -> Vec<f64> {
        let mut x = vec![0.0; layout.width];
        x[..layout.num_numerical].copy_from_slice(&self.adv_numerics);
        layout.set_categories(&mut x, &self.adv_categoricals);
        x
    }
}

pub(crate) fn l0_changes(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Assembles a result for an encoded adversarial point.
pub(crate) fn finish_result(
    ctx: &AttackContext<'_>,
    x_clean: &[f64],
    y: usize,
    x_adv: &[f64],
    lambda: f64,
    started: Instant,
) -> AttackResult {
    let layout = ctx.layout;
    let d_n = layout.num_numerical;
    let (objective, loss, m_distance) = penalized_value(ctx, x_adv, x_clean, y, lambda);
    let adv_categoricals = layout.categories_of(x_adv);
    let clean_cats = layout.categories_of(x_clean);
    let l1: f64 = x_adv[..d_n].iter().zip(&x_clean[..d_n]).map(|(a, b)| (a - b).abs()).sum();
    let predicted = ctx.model.predict(x_adv);
    AttackResult {
        adv_numerics: x_adv[..d_n].to_vec(),
        l0_cat_changes: l0_changes(&adv_categoricals, &clean_cats),
        adv_categoricals,
        label: y,
        predicted,
        loss,
        objective,
        m_distance,
        l1_num_perturbation: l1,
        success: predicted != y,
        flagged_ood: None,
        wall_time_secs: started.elapsed().as_secs_f64(),
        trace: None,
    }
}

/// Runs M-Attack on one encoded clean sample `x_clean` with true label `y`.
///
/// Every returned result satisfies `‖x′_n − x_n‖₁ ≤ ε₁` and changes at most
/// `ε₂` categorical features.
pub fn attack(ctx: &AttackContext<'_>, x_clean: &[f64], y: usize, config: &AttackConfig) -> Result<AttackResult> {
    let started = Instant::now();
    config.validate()?;
    ctx.check(x_clean, y, config.lambda)?;
    let layout = ctx.layout;
    let d_n = layout.num_numerical;
    let sizes: Vec<usize> = layout.blocks.iter().map(|b| b.size).collect();
    let clean_cats = layout.categories_of(x_clean);
    let clean_num = &x_clean[..d_n];

    if config.steps == 0 {
        return Ok(finish_result(ctx, x_clean, y, x_clean, config.lambda, started));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x_num = clean_num.to_vec();
    let mut pi = CategoricalDistribution::concentrated(&clean_cats, &sizes, INIT_CONFIDENCE);
    let active = categoricals_active(ctx, config);
    let step_num = config.step_num();
    let mut trace = config.record_trace.then(Vec::new);

    for _ in 0..config.steps {
        let noises: Vec<GumbelNoise> = if active {
            (0..config.mc_samples).map(|_| GumbelNoise::sample(&sizes, &mut rng)).collect()
        } else {
            Vec::new()
        };
        let eval = objective_q(ctx, x_clean, y, &x_num, &pi, &noises, config)?;
        if d_n > 0 {
            let delta = l1_steepest_step(&eval.grad_num, step_num, config.step_coords.min(d_n))?;
            for (x, d) in x_num.iter_mut().zip(&delta) {
                *x += d;
            }
        }
        if active && config.gamma > 0.0 {
            update_distribution(&mut pi, &eval, config)?;
        }
        if d_n > 0 {
            let offset: Vec<f64> = x_num.iter().zip(clean_num).map(|(a, b)| a - b).collect();
            let w = project_l1_ball(&offset, config.epsilon1)?;
            for ((x, c), wi) in x_num.iter_mut().zip(clean_num).zip(&w) {
                *x = c + wi;
            }
        }
        if let Some(t) = trace.as_mut() {
            t.push(StepTrace {
                q: eval.q,
                loss: eval.loss,
                ce: eval.ce,
                distance: eval.distance,
                numerics: x_num.clone(),
            });
        }
    }

    let mut x_adv = x_clean.to_vec();
    x_adv[..d_n].copy_from_slice(&x_num);

    let candidates = if active {
        final_candidates(ctx, x_clean, y, &x_adv, &pi, &clean_cats, config, &mut rng)
    } else {
        vec![clean_cats.clone()]
    };

    let mut best: Option<(f64, Vec<usize>)> = None;
    for cand in candidates {
        layout.set_categories(&mut x_adv, &cand);
        let (v, _, _) = penalized_value(ctx, &x_adv, x_clean, y, config.lambda);
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((v, cand));
        }
    }
    let (_, cats) = best.expect("at least one candidate");
    layout.set_categories(&mut x_adv, &cats);
    let mut result = finish_result(ctx, x_clean, y, &x_adv, config.lambda, started);
    result.trace = trace;
    debug_assert!(result.l0_cat_changes <= config.epsilon2);
    Ok(result)
}

/// Hard samples from π that satisfy the l0 budget, plus the mode of π and the
/// clean assignment. When no sample is feasible, every sample is repaired by
/// reverting its least useful changes.
#[allow(clippy::too_many_arguments)]
fn final_candidates(
    ctx: &AttackContext<'_>,
    x_clean: &[f64],
    y: usize,
    x_adv: &[f64],
    pi: &CategoricalDistribution,
    clean_cats: &[usize],
    config: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    // Duplicates are dropped in draw order; the first of equal candidates
    // wins ties anyway, so this only saves evaluations.
    let mut draws: Vec<Vec<usize>> = Vec::with_capacity(config.final_samples);
    for _ in 0..config.final_samples {
        let d = gumbel_softmax_sample(pi, config.tau, rng).hard;
        if !draws.contains(&d) {
            draws.push(d);
        }
    }
    let feasible: Vec<Vec<usize>> = draws
        .iter()
        .filter(|d| l0_changes(d, clean_cats) <= config.epsilon2)
        .cloned()
        .collect();
    let mut out = if feasible.is_empty() {
        let mut repaired: Vec<Vec<usize>> = Vec::with_capacity(draws.len());
        for d in draws {
            let r = repair_to_budget(ctx, x_clean, y, x_adv, d, clean_cats, config);
            if !repaired.contains(&r) {
                repaired.push(r);
            }
        }
        repaired
    } else {
        feasible
    };
    let mode: Vec<usize> = pi.logits.iter().map(|l| argmax(l)).collect();
    let mode = repair_to_budget(ctx, x_clean, y, x_adv, mode, clean_cats, config);
    for c in [mode, clean_cats.to_vec()] {
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Reverts changed features, smallest objective contribution first, until at
/// most ε₂ remain changed.
fn repair_to_budget(
    ctx: &AttackContext<'_>,
    x_clean: &[f64],
    y: usize,
    x_adv: &[f64],
    mut cats: Vec<usize>,
    clean_cats: &[usize],
    config: &AttackConfig,
) -> Vec<usize> {
    let layout = ctx.layout;
    let mut x = x_adv.to_vec();
    layout.set_categories(&mut x, &cats);
    let (full, _, _) = penalized_value(ctx, &x, x_clean, y, config.lambda);
    let mut contributions: Vec<(f64, usize)> = Vec::new();
    for i in 0..cats.len() {
        if cats[i] == clean_cats[i] {
            continue;
        }
        let mut reverted = cats.clone();
        reverted[i] = clean_cats[i];
        layout.set_categories(&mut x, &reverted);
        let (v, _, _) = penalized_value(ctx, &x, x_clean, y, config.lambda);
        contributions.push((full - v, i));
    }
    contributions.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let excess = contributions.len().saturating_sub(config.epsilon2);
    for &(_, i) in contributions.iter().take(excess) {
        cats[i] = clean_cats[i];
    }
    cats
}

/// Sum of `|x′_n − x_n|` over numeric coordinates.
pub fn l1_perturbation(layout: &FeatureLayout, x_adv: &[f64], x_clean: &[f64]) -> f64 {
    let d_n = layout.num_numerical;
    let diff: Vec<f64> = x_adv[..d_n].iter().zip(&x_clean[..d_n]).map(|(a, b)| a - b).collect();
    l1_norm(&diff)
}
