use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Day, ImpressionRecord, PartnerProfile};
use crate::error::{Error, Result};
use crate::nn::substream;

/// Knobs of the synthetic campaign-log generator.
///
/// Each partner sells `categories_per_partner` categories. A shared random
/// linear map takes the partner's category vector to the coefficients of its
/// engagement-count model; `partner_noise_scale` adds a partner-specific
/// Gaussian deviation relative to the size of the shared part (0 makes
/// partners with equal categories behave identically).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_partners: usize,
    pub n_users: usize,
    pub category_dim: usize,
    pub campaign_dim: usize,
    /// Budget weight of the partner at rank r is proportional to `(r + 1)^-zipf_exponent`.
    pub zipf_exponent: f64,
    pub categories_per_partner: usize,
    pub partner_noise_scale: f64,
    /// Standard deviation of the Gaussian noise on the label logit.
    pub label_noise_scale: f64,
    pub target_positive_rate: f64,
    pub train_day_impressions: usize,
    pub eval_day_impressions: usize,
    pub seed: u64,
    /// Log-normal spread of user category affinities (mean affinity is 1).
    pub affinity_sigma: f64,
    /// Size of the shared category-to-coefficient map.
    pub coefficient_scale: f64,
    /// Standard deviation of the per user-partner history effect on all counts.
    pub history_scale: f64,
    /// Expected engagement count at zero log rate.
    pub base_count: f64,
    /// Logit weight of the standardized campaign slots.
    pub label_signal_scale: f64,
    /// Logit weight of the user's centered affinity for the partner's categories.
    pub affinity_label_weight: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_partners: 404,
            n_users: 20_000,
            category_dim: 10,
            campaign_dim: 20,
            zipf_exponent: 0.85,
            categories_per_partner: 3,
            partner_noise_scale: 0.5,
            label_noise_scale: 0.3,
            target_positive_rate: 0.05,
            train_day_impressions: 50_000,
            eval_day_impressions: 300_000,
            seed: 0,
            affinity_sigma: 0.7,
            coefficient_scale: 1.0,
            history_scale: 0.3,
            base_count: 3.0,
            label_signal_scale: 3.0,
            affinity_label_weight: 0.5,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_partners == 0
            || self.n_users == 0
            || self.category_dim == 0
            || self.campaign_dim == 0
            || self.train_day_impressions == 0
            || self.eval_day_impressions == 0
        {
            return bad("partner, user, dimension and impression counts must be positive".into());
        }
        if self.n_partners > u32::MAX as usize || self.n_users > u32::MAX as usize {
            return bad("partner and user counts must fit in 32 bits".into());
        }
        if self.categories_per_partner == 0 || self.categories_per_partner > self.category_dim {
            return bad(format!(
                "categories_per_partner must lie in 1..={}, got {}",
                self.category_dim, self.categories_per_partner
            ));
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return bad(format!("zipf_exponent must be positive, got {}", self.zipf_exponent));
        }
        if !(self.target_positive_rate > 0.0 && self.target_positive_rate < 0.5) {
            return bad(format!(
                "target_positive_rate must lie in (0, 0.5), got {}",
                self.target_positive_rate
            ));
        }
        if !(self.base_count > 0.0 && self.base_count.is_finite()) {
            return bad(format!("base_count must be positive, got {}", self.base_count));
        }
        let scales = [
            ("partner_noise_scale", self.partner_noise_scale),
            ("label_noise_scale", self.label_noise_scale),
            ("affinity_sigma", self.affinity_sigma),
            ("coefficient_scale", self.coefficient_scale),
            ("history_scale", self.history_scale),
            ("label_signal_scale", self.label_signal_scale),
            ("affinity_label_weight", self.affinity_label_weight),
        ];
        for (name, v) in scales {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

// Random streams of one generator seed.
const STREAM_MAP: u64 = 1;
const STREAM_LABEL_MODEL: u64 = 2;
const STREAM_USERS: u64 = 3;
const STREAM_PARTNERS: u64 = 4;
// Per-day streams are DAY_STREAM_BASE + (day << 32) + partner; per
// user-partner history streams set the top bits so the ranges never meet.
const DAY_STREAM_BASE: u64 = 1 << 40;
const HISTORY_STREAM_TAG: u64 = 3 << 62;

const MAX_LOG_RATE: f64 = 8.0;

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite non-negative sd")
}

/// Deterministic history effect of user `u` with partner `p`, shared by both days.
fn history_effect(seed: u64, partner: u32, user: u32, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let stream = HISTORY_STREAM_TAG | ((partner as u64) << 32) | user as u64;
    let z: f64 = StandardNormal.sample(&mut substream(seed, stream));
    scale * z
}

/// Split `total` impressions proportionally to `weights` by largest remainder.
fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // larger remainder first, lower rank on ties
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

struct Draft {
    record: ImpressionRecord,
    /// Part of the logit fixed by the user and partner (affinity term plus noise).
    logit_offset: f64,
    uniform: f64,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Intercept `b` with `mean(logistic(b + s_i)) = target`, by bisection.
fn calibrate_intercept(scores: &[f64], target: f64) -> Result<f64> {
    let mean_at = |b: f64| scores.iter().map(|s| logistic(b + s)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    let (at_lo, at_hi) = (mean_at(lo), mean_at(hi));
    if !(at_lo <= target && target <= at_hi) {
        return Err(Error::Calibration(format!(
            "target rate {target} outside reachable range [{at_lo:.3e}, {at_hi:.3e}] over {} records",
            scores.len()
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Generate partner profiles and both days of impression records.
///
/// Campaign slots are `ln(1 + count)` with Poisson counts whose log rates
/// are linear in the user's affinities for the partner's categories plus a
/// user-partner history effect. Labels are Bernoulli with a logistic
/// probability of a linear score over the standardized campaign slots, the
/// user's affinities and Gaussian noise; the intercept is calibrated on the
/// train day so the positive rate matches `target_positive_rate`.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let cfg = config;
    let (n_cat, n_camp, k) = (cfg.category_dim, cfg.campaign_dim, cfg.categories_per_partner);
    let seed = cfg.seed;

    // shared category -> coefficient map: map[d][c][c2]
    let mut rng = substream(seed, STREAM_MAP);
    let shared: Vec<f64> = (0..n_camp * n_cat * n_cat)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();

    let mut rng = substream(seed, STREAM_LABEL_MODEL);
    let mut beta: Vec<f64> = (0..n_camp).map(|_| StandardNormal.sample(&mut rng)).collect();
    let beta_norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    beta.iter_mut().for_each(|b| *b *= cfg.label_signal_scale / beta_norm);
    let affinity_weights: Vec<f64> = (0..n_cat)
        .map(|_| cfg.affinity_label_weight * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();

    let mut rng = substream(seed, STREAM_USERS);
    let sigma = cfg.affinity_sigma;
    let users: Vec<f64> = (0..cfg.n_users * n_cat)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (sigma * z - sigma * sigma / 2.0).exp()
        })
        .collect();

    let mut rng = substream(seed, STREAM_PARTNERS);
    let weights: Vec<f64> = (0..cfg.n_partners)
        .map(|r| ((r + 1) as f64).powf(-cfg.zipf_exponent))
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let noise = normal(cfg.partner_noise_scale * cfg.coefficient_scale);
    let cols = n_cat + 1;
    let profiles: Vec<PartnerProfile> = (0..cfg.n_partners)
        .map(|p| {
            let mut categories = sample(&mut rng, n_cat, k).into_vec();
            categories.sort_unstable();
            let mut coefficients = vec![0.0; n_camp * cols];
            for d in 0..n_camp {
                for c in 0..n_cat {
                    let mapped: f64 = categories.iter().map(|&c2| shared[(d * n_cat + c) * n_cat + c2]).sum();
                    coefficients[d * cols + c] = cfg.coefficient_scale * mapped / (k as f64).sqrt();
                }
                coefficients[d * cols + n_cat] = 1.0;
            }
            for v in coefficients.iter_mut() {
                *v += noise.sample(&mut rng);
            }
            PartnerProfile {
                id: p as u32,
                categories,
                budget_weight: weights[p] / weight_sum,
                coefficients,
            }
        })
        .collect();

    let label_noise = normal(cfg.label_noise_scale);
    let log_base = cfg.base_count.ln();
    let mut drafts = Vec::with_capacity(cfg.train_day_impressions + cfg.eval_day_impressions);
    for (day_index, (day, total)) in [(Day::Train, cfg.train_day_impressions), (Day::Eval, cfg.eval_day_impressions)]
        .into_iter()
        .enumerate()
    {
        let counts = allocate(total, &weights);
        for (profile, &count) in profiles.iter().zip(&counts) {
            let stream = DAY_STREAM_BASE + ((day_index as u64) << 32) + profile.id as u64;
            let mut rng = substream(seed, stream);
            for _ in 0..count {
                let user = rng.random_range(0..cfg.n_users) as u32;
                let affinity = &users[user as usize * n_cat..(user as usize + 1) * n_cat];
                let history = history_effect(seed, profile.id, user, cfg.history_scale);
                let mut categories = vec![0.0; n_cat];
                for &c in &profile.categories {
                    categories[c] = affinity[c];
                }
                let campaign: Vec<f64> = (0..n_camp)
                    .map(|d| {
                        let row = &profile.coefficients[d * cols..(d + 1) * cols];
                        let log_rate = log_base
                            + profile.categories.iter().map(|&c| row[c] * (affinity[c] - 1.0)).sum::<f64>()
                            + row[n_cat] * history;
                        let rate = log_rate.min(MAX_LOG_RATE).exp();
                        let count: f64 = Poisson::new(rate).expect("positive finite rate").sample(&mut rng);
                        count.ln_1p()
                    })
                    .collect();
                let affinity_term: f64 = profile.categories.iter().map(|&c| affinity_weights[c] * (affinity[c] - 1.0)).sum();
                let logit_offset = affinity_term + label_noise.sample(&mut rng);
                drafts.push(Draft {
                    record: ImpressionRecord {
                        partner: profile.id,
                        user,
                        day,
                        categories,
                        campaign,
                        label: false,
                    },
                    logit_offset,
                    uniform: rng.random::<f64>(),
                });
            }
        }
    }

    // standardize campaign slots with train-day moments before weighting
    let train: Vec<&Draft> = drafts.iter().filter(|d| d.record.day == Day::Train).collect();
    let n_train = train.len() as f64;
    let mut mean = vec![0.0; n_camp];
    let mut sd = vec![0.0; n_camp];
    for d in &train {
        for (m, v) in mean.iter_mut().zip(&d.record.campaign) {
            *m += v / n_train;
        }
    }
    for d in &train {
        for ((s, v), m) in sd.iter_mut().zip(&d.record.campaign).zip(&mean) {
            *s += (v - m) * (v - m) / n_train;
        }
    }
    sd.iter_mut().for_each(|s| *s = s.sqrt().max(1e-9));
    let scores: Vec<f64> = drafts
        .iter()
        .map(|d| {
            let signal: f64 = (0..n_camp).map(|j| beta[j] * (d.record.campaign[j] - mean[j]) / sd[j]).sum();
            signal + d.logit_offset
        })
        .collect();
    let train_scores: Vec<f64> = drafts
        .iter()
        .zip(&scores)
        .filter(|(d, _)| d.record.day == Day::Train)
        .map(|(_, s)| *s)
        .collect();
    let intercept = calibrate_intercept(&train_scores, cfg.target_positive_rate)?;

    let records: Vec<ImpressionRecord> = drafts
        .into_iter()
        .zip(&scores)
        .map(|(mut d, s)| {
            d.record.label = d.uniform < logistic(intercept + s);
            d.record
        })
        .collect();
    let dataset = Dataset {
        config: cfg.clone(),
        profiles,
        records,
    };
    let realized = dataset.positive_rate(Day::Train);
    let target = cfg.target_positive_rate;
    if (realized - target).abs() > 0.2 * target {
        return Err(Error::Calibration(format!(
            "realized train-day positive rate {realized:.4} misses target {target} by more than 20% \
             (intercept {intercept:.3}, {} records)",
            cfg.train_day_impressions
        )));
    }
    Ok(dataset)
}
