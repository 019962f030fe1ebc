//! Two-stage baselines: l1-PGD on numerics, then a categorical stage that
//! either searches every combination of the top-ranked features or assigns
//! them greedily one at a time.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attack::{finish_result, penalized_objective, penalized_value, AttackContext, AttackResult};
use crate::error::{Error, Result};
use crate::numerics::{l1_steepest_step, project_l1_ball};

pub const DEFAULT_MAX_SEARCH_COMBINATIONS: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub epsilon1: f64,
    pub epsilon2: usize,
    pub lambda: f64,
    /// `None` means `ε₁/10`.
    pub step_num: Option<f64>,
    pub steps: usize,
    pub seed: u64,
    pub max_search_combinations: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epsilon1: 0.6,
            epsilon2: 3,
            lambda: 0.0,
            step_num: None,
            steps: 200,
            seed: 0,
            max_search_combinations: DEFAULT_MAX_SEARCH_COMBINATIONS,
        }
    }
}

impl BaselineConfig {
    pub fn step_num(&self) -> f64 {
        self.step_num.unwrap_or(self.epsilon1 / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon1 > 0.0) || !self.epsilon1.is_finite() {
            return Err(Error::usage(format!("epsilon1 must be > 0, got {}", self.epsilon1)));
        }
        if !(self.step_num() > 0.0) {
            return Err(Error::usage("step_num must be > 0"));
        }
        if self.max_search_combinations == 0 {
            return Err(Error::usage("max_search_combinations must be >= 1"));
        }
        Ok(())
    }
}

/// l1-PGD on the numeric coordinates with categoricals held at their clean
/// values. Returns the numerics after every step.
pub fn l1_pgd_trajectory(
    ctx: &AttackContext<'_>,
    x_clean: &[f64],
    y: usize,
    config: &BaselineConfig,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    ctx.check(x_clean, y, config.lambda)?;
    let d_n = ctx.layout.num_numerical;
    let clean_num = &x_clean[..d_n];
    let step = config.step_num();
    let mut x_adv = x_clean.to_vec();
    let mut x_num = clean_num.to_vec();
    let mut trajectory = Vec::with_capacity(config.steps);
    for t in 0..config.steps {
        if d_n == 0 {
            trajectory.push(Vec::new());
            continue;
        }
        x_adv[..d_n].copy_from_slice(&x_num);
        let p = penalized_objective(ctx, &x_adv, x_clean, y, config.lambda);
        if !p.value.is_finite() {
            return Err(Error::numeric(format!("objective is non-finite at step {t}")));
        }
        let grad_num = p.grad[..d_n].to_vec();
        let delta = l1_steepest_step(&grad_num, step, 1)?;
        for (x, d) in x_num.iter_mut().zip(&delta) {
            *x += d;
        }
        let offset: Vec<f64> = x_num.iter().zip(clean_num).map(|(a, b)| a - b).collect();
        let w = project_l1_ball(&offset, config.epsilon1)?;
        for ((x, c), wi) in x_num.iter_mut().zip(clean_num).zip(&w) {
            *x = c + wi;
        }
        trajectory.push(x_num.clone());
    }
    Ok(trajectory)
}

/// Final numerics of [`l1_pgd_trajectory`].
pub fn l1_pgd(ctx: &AttackContext<'_>, x_clean: &[f64], y: usize, config: &BaselineConfig) -> Result<Vec<f64>> {
    let d_n = ctx.layout.num_numerical;
    Ok(l1_pgd_trajectory(ctx, x_clean, y, config)?
        .pop()
        .unwrap_or_else(|| x_clean[..d_n].to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImpact {
    pub feature: usize,
    /// Best objective gain from changing only this feature.
    pub impact: f64,
    pub best_category: usize,
}

/// Scores each categorical feature by the best objective gain over its
/// alternative categories, everything else fixed at `x_adv`. Sorted by
/// impact descending, ties by lower index.
pub fn rank_categorical_features(
    ctx: &AttackContext<'_>,
    x_adv: &[f64],
    x_clean: &[f64],
    y: usize,
    lambda: f64,
) -> Vec<FeatureImpact> {
    let layout = ctx.layout;
    let (base, _, _) = penalized_value(ctx, x_adv, x_clean, y, lambda);
    let current = layout.categories_of(x_adv);
    let mut x = x_adv.to_vec();
    let mut out: Vec<FeatureImpact> = Vec::with_capacity(current.len());
    for (i, b) in layout.blocks.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for c in (0..b.size).filter(|&c| c != current[i]) {
            let mut cats = current.clone();
            cats[i] = c;
            layout.set_categories(&mut x, &cats);
            let (v, _, _) = penalized_value(ctx, &x, x_clean, y, lambda);
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, c));
            }
        }
        layout.set_categories(&mut x, &current);
        let (v, c) = best.unwrap_or((base, current[i]));
        out.push(FeatureImpact {
            feature: i,
            impact: v - base,
            best_category: c,
        });
    }
    out.sort_by(|a, b| b.impact.total_cmp(&a.impact).then(a.feature.cmp(&b.feature)));
    out
}

fn pgd_stage(
    ctx: &AttackContext<'_>,
    x_clean: &[f64],
    y: usize,
    config: &BaselineConfig,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let x_num = l1_pgd(ctx, x_clean, y, config)?;
    let mut x_adv = x_clean.to_vec();
    x_adv[..ctx.layout.num_numerical].copy_from_slice(&x_num);
    let ranked = rank_categorical_features(ctx, &x_adv, x_clean, y, config.lambda);
    let top = ranked
        .iter()
        .take(config.epsilon2)
        .map(|f| f.feature)
        .collect();
    Ok((x_adv, top))
}

/// Number of joint assignments over the given features.
pub fn combination_count(sizes: &[usize], features: &[usize]) -> u128 {
    features.iter().map(|&i| sizes[i] as u128).product()
}

/// l1-PGD followed by exhaustive search over every category combination
/// (originals included) of the top-ε₂ ranked features.
pub fn search_attack(
    ctx: &AttackContext<'_>,
    x_clean: &[f64],
    y: usize,
    config: &BaselineConfig,
) -> Result<AttackResult> {
    let started = Instant::now();
    let layout = ctx.layout;
    let (mut x_adv, top) = pgd_stage(ctx, x_clean, y, config)?;
    let sizes: Vec<usize> = layout.blocks.iter().map(|b| b.size).collect();
    let combinations = combination_count(&sizes, &top);
    if combinations > config.max_search_combinations as u128 {
        return Err(Error::Capacity {
            combinations,
            cap: config.max_search_combinations,
        });
    }
    let clean = layout.categories_of(x_clean);
    let mut cats = clean.clone();
    let mut best: Option<(f64, Vec<usize>)> = None;
    // Mixed-radix counter over the selected features.
    let mut digits = vec![0usize; top.len()];
    loop {
        for (d, &i) in digits.iter().zip(&top) {
            cats[i] = (clean[i] + d) % sizes[i];
        }
        layout.set_categories(&mut x_adv, &cats);
        let (v, _, _) = penalized_value(ctx, &x_adv, x_clean, y, config.lambda);
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((v, cats.clone()));
        }
        let mut k = 0;
        while k < digits.len() {
            digits[k] += 1;
            if digits[k] < sizes[top[k]] {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
        if k == digits.len() {
            break;
        }
    }
    let (_, cats) = best.expect("at least the clean assignment");
    layout.set_categories(&mut x_adv, &cats);
    Ok(finish_result(ctx, x_clean, y, &x_adv, config.lambda, started))
}

/// l1-PGD followed by greedy assignment of the top-ε₂ ranked features in rank
/// order, each given its best category with earlier choices held fixed.
pub fn greedy_attack(
    ctx: &AttackContext<'_>,
    x_clean: &[f64],
    y: usize,
    config: &BaselineConfig,
) -> Result<AttackResult> {
    let started = Instant::now();
    let layout = ctx.layout;
    let (mut x_adv, top) = pgd_stage(ctx, x_clean, y, config)?;
    let mut cats = layout.categories_of(&x_adv);
    for &i in &top {
        let (mut best_v, _, _) = penalized_value(ctx, &x_adv, x_clean, y, config.lambda);
        let mut best_c = cats[i];
        let keep = cats[i];
        for c in (0..layout.blocks[i].size).filter(|&c| c != keep) {
            cats[i] = c;
            layout.set_categories(&mut x_adv, &cats);
            let (v, _, _) = penalized_value(ctx, &x_adv, x_clean, y, config.lambda);
            if v > best_v {
                best_v = v;
                best_c = c;
            }
        }
        cats[i] = best_c;
        layout.set_categories(&mut x_adv, &cats);
    }
    Ok(finish_result(ctx, x_clean, y, &x_adv, config.lambda, started))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureLayout;
    use crate::model::MlpClassifier;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64, d_n: usize, cats: &[usize]) -> (MlpClassifier, FeatureLayout, Vec<f64>) {
        let layout = FeatureLayout::new(d_n, cats);
        let model = MlpClassifier::initialized(layout.width, 8, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut x = vec![0.0; layout.width];
        for v in x.iter_mut().take(d_n) {
            *v = rng.random_range(-1.0..1.0);
        }
        let c: Vec<usize> = cats.iter().map(|&k| rng.random_range(0..k)).collect();
        layout.set_categories(&mut x, &c);
        (model, layout, x)
    }

    #[test]
    fn zero_steps_is_identity() {
        let (model, layout, x) = toy(1, 3, &[3, 2]);
        let ctx = AttackContext::new(&model, &layout, None);
        let cfg = BaselineConfig {
            steps: 0,
            ..BaselineConfig::default()
        };
        assert_eq!(l1_pgd(&ctx, &x, 0, &cfg).unwrap(), x[..3].to_vec());
    }

    #[test]
    fn budgets_hold() {
        for seed in 0..20 {
            let (model, layout, x) = toy(seed, 4, &[3, 4, 2, 5]);
            let ctx = AttackContext::new(&model, &layout, None);
            let cfg = BaselineConfig {
                epsilon1: 0.3,
                epsilon2: 2,
                steps: 30,
                ..BaselineConfig::default()
            };
            for r in [search_attack(&ctx, &x, 1, &cfg).unwrap(), greedy_attack(&ctx, &x, 1, &cfg).unwrap()] {
                assert!(r.l1_num_perturbation <= 0.3 + 1e-9);
                assert!(r.l0_cat_changes <= 2);
            }
        }
    }

    #[test]
    fn zero_l0_budget_leaves_categoricals() {
        let (model, layout, x) = toy(2, 2, &[3, 3]);
        let ctx = AttackContext::new(&model, &layout, None);
        let cfg = BaselineConfig {
            epsilon2: 0,
            steps: 10,
            ..BaselineConfig::default()
        };
        let s = search_attack(&ctx, &x, 0, &cfg).unwrap();
        let g = greedy_attack(&ctx, &x, 0, &cfg).unwrap();
        assert_eq!(s.l0_cat_changes, 0);
        assert_eq!(s, AttackResult { wall_time_secs: s.wall_time_secs, ..g.clone() });
        assert_eq!(s.adv_numerics, l1_pgd(&ctx, &x, 0, &cfg).unwrap());
    }

    #[test]
    fn ranking_matches_enumeration() {
        for seed in 0..10 {
            let (model, layout, x) = toy(seed, 1, &[3, 4, 2]);
            let ctx = AttackContext::new(&model, &layout, None);
            let ranked = rank_categorical_features(&ctx, &x, &x, 0, 0.0);
            let clean = layout.categories_of(&x);
            let base = model.loss(&x, 0);
            let mut expected: Vec<(f64, usize)> = (0..3)
                .map(|i| {
                    let best = (0..layout.blocks[i].size)
                        .filter(|&c| c != clean[i])
                        .map(|c| {
                            let mut z = x.clone();
                            let mut cats = clean.clone();
                            cats[i] = c;
                            layout.set_categories(&mut z, &cats);
                            model.loss(&z, 0)
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                    (best - base, i)
                })
                .collect();
            expected.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let got: Vec<usize> = ranked.iter().map(|f| f.feature).collect();
            let want: Vec<usize> = expected.iter().map(|e| e.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn constant_block_has_zero_impact() {
        let layout = FeatureLayout::new(1, &[3, 2]);
        let mut model = MlpClassifier::initialized(layout.width, 4, 2, 3);
        // zero the first-layer weights reading block 0
        let hidden = model.hidden();
        let width = layout.width;
        let w1 = &mut model.parameters_mut()[0];
        for h in 0..hidden {
            for c in layout.blocks[0].range() {
                w1[h * width + c] = 0.0;
            }
        }
        let mut x = vec![0.2, 0.0, 0.0, 0.0, 0.0, 0.0];
        layout.set_categories(&mut x, &[1, 0]);
        let ctx = AttackContext::new(&model, &layout, None);
        let ranked = rank_categorical_features(&ctx, &x, &x, 0, 0.0);
        let f0 = ranked.iter().find(|f| f.feature == 0).unwrap();
        assert_eq!(f0.impact, 0.0);
    }

    #[test]
    fn search_dominates_greedy() {
        for seed in 0..50 {
            let (model, layout, x) = toy(seed, 3, &[3, 4, 2, 3, 5]);
            let ctx = AttackContext::new(&model, &layout, None);
            let cfg = BaselineConfig {
                epsilon2: 3,
                steps: 15,
                ..BaselineConfig::default()
            };
            let s = search_attack(&ctx, &x, (seed % 2) as usize, &cfg).unwrap();
            let g = greedy_attack(&ctx, &x, (seed % 2) as usize, &cfg).unwrap();
            assert!(s.objective >= g.objective, "seed {seed}");
        }
    }

    #[test]
    fn single_feature_greedy_equals_search() {
        for seed in 0..10 {
            let (model, layout, x) = toy(seed, 2, &[5]);
            let ctx = AttackContext::new(&model, &layout, None);
            let cfg = BaselineConfig {
                epsilon2: 1,
                steps: 10,
                ..BaselineConfig::default()
            };
            let s = search_attack(&ctx, &x, 0, &cfg).unwrap();
            let g = greedy_attack(&ctx, &x, 0, &cfg).unwrap();
            assert_eq!(s.adv_categoricals, g.adv_categoricals);
            assert_eq!(s.objective, g.objective);
        }
    }

    #[test]
    fn search_capacity_error() {
        let (model, layout, x) = toy(0, 1, &[50, 50, 50]);
        let ctx = AttackContext::new(&model, &layout, None);
        let cfg = BaselineConfig {
            epsilon2: 3,
            steps: 1,
            ..BaselineConfig::default()
        };
        match search_attack(&ctx, &x, 0, &cfg) {
            Err(Error::Capacity { combinations, cap }) => {
                assert_eq!(combinations, 125_000);
                assert_eq!(cap, DEFAULT_MAX_SEARCH_COMBINATIONS);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }
}
