//! Verifiable reward stack and root-cause scoring metrics.
//!
//! Every policy in the crate is trained and evaluated against these scores:
//! a pod-level match term, a recall-biased F-beta over exact (service,
//! resource) labels, a thresholded false-negative penalty, a format score
//! over the structured-output checks, a piecewise-linear length score, and a
//! KL regularizer. The total is the plain sum of the result, format, length,
//! and KL components.

use serde::{Deserialize, Serialize};

use crate::sim::TruthSet;

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("c_total must be positive")]
    ZeroChecks,
    #[error("c_invalid {invalid} exceeds c_total {total}")]
    TooManyInvalid { invalid: u32, total: u32 },
    #[error("log-likelihood sequences differ in length: {new_len} vs {old_len}")]
    LengthMismatch { new_len: usize, old_len: usize },
}

/// Match statistics between a predicted label set and the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    /// Exact (service, resource) pairs predicted and true.
    pub tp: u32,
    /// Pairs predicted but not true.
    pub fp: u32,
    /// Pairs true but not predicted.
    pub fn_: u32,
    /// Services predicted faulty that are faulty, resource aside.
    pub pod_match: u32,
    /// Services predicted faulty that are healthy.
    pub pod_not: u32,
}

/// All reward constants. The defaults are this crate's pinned values; change
/// them through a config file rather than in code so scores stay comparable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Numerical stabilizer in the ratio denominators.
    pub epsilon: f64,
    /// Weight on the pod-level term; small by construction.
    pub alpha: f64,
    /// F-beta beta; above one so recall dominates.
    pub beta_f: f64,
    /// Bonus granted when at least one true positive exists.
    pub delta: f64,
    /// Slope of the false-negative penalty.
    pub d: f64,
    /// False negatives tolerated before the penalty engages.
    pub tau_fn: u32,
    /// Reasoning-length bounds in tokens.
    pub l_min: u32,
    pub l_max: u32,
    /// KL regularizer strength.
    pub beta_kl: f64,
    /// Likelihood-ratio clip half-width.
    pub clip_eps: f64,
    /// Candidate generations per prompt.
    pub group_size: usize,
    /// Stabilizer added to the advantage denominator.
    pub adv_eps: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            alpha: 0.05,
            beta_f: 2.0,
            delta: 0.1,
            d: 0.25,
            tau_fn: 2,
            l_min: 64,
            l_max: 1024,
            beta_kl: 0.01,
            clip_eps: 0.2,
            group_size: 8,
            adv_eps: 1e-8,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.epsilon <= 0.0 {
            return Err("epsilon must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err("alpha must be in (0, 1)".into());
        }
        if self.beta_f <= 1.0 {
            return Err("beta_f must exceed 1".into());
        }
        if self.delta <= 0.0 || self.d <= 0.0 {
            return Err("delta and d must be positive".into());
        }
        if self.l_min >= self.l_max {
            return Err("l_min must be below l_max".into());
        }
        if self.beta_kl < 0.0 {
            return Err("beta_kl must be non-negative".into());
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err("clip_eps must be in (0, 1)".into());
        }
        if self.group_size < 2 {
            return Err("group_size must be at least 2".into());
        }
        if self.adv_eps <= 0.0 {
            return Err("adv_eps must be positive".into());
        }
        Ok(())
    }
}

/// Per-sample score decomposition; `r_total` is always the exact sum of the
/// result, format, length, and KL components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub s_pod: f64,
    pub f_beta: f64,
    pub r_base: f64,
    pub r_result: f64,
    pub r_format: f64,
    pub r_length: f64,
    pub r_kl: f64,
    pub r_total: f64,
}

impl RewardBreakdown {
    /// Replaces the KL component and recomputes the total.
    pub fn with_kl(mut self, r_kl: f64) -> Self {
        self.r_kl = r_kl;
        self.r_total = self.r_result + self.r_format + self.r_length + self.r_kl;
        self
    }
}

/// Set arithmetic between predicted and true label sets. Pod-level counts
/// collapse the resource dimension.
pub fn match_counts(predicted: &TruthSet, truth: &TruthSet) -> MatchCounts {
    let tp = predicted.intersection(truth).count() as u32;
    let fp = predicted.difference(truth).count() as u32;
    let fn_ = truth.difference(predicted).count() as u32;
    let predicted_services: std::collections::BTreeSet<_> =
        predicted.iter().map(|(s, _)| *s).collect();
    let truth_services: std::collections::BTreeSet<_> = truth.iter().map(|(s, _)| *s).collect();
    let pod_match = predicted_services.intersection(&truth_services).count() as u32;
    let pod_not = predicted_services.difference(&truth_services).count() as u32;
    MatchCounts { tp, fp, fn_, pod_match, pod_not }
}

/// Pod-level match score: `pod_match / (pod_match + pod_not + epsilon)`.
pub fn s_pod(counts: &MatchCounts, cfg: &RewardConfig) -> f64 {
    f64::from(counts.pod_match)
        / (f64::from(counts.pod_match) + f64::from(counts.pod_not) + cfg.epsilon)
}

/// Recall-biased F-beta:
/// `(1+b^2) TP / ((1+b^2) TP + b^2 FN + FP + epsilon)`.
pub fn f_beta(counts: &MatchCounts, cfg: &RewardConfig) -> f64 {
    let b2 = cfg.beta_f * cfg.beta_f;
    let weighted_tp = (1.0 + b2) * f64::from(counts.tp);
    weighted_tp / (weighted_tp + b2 * f64::from(counts.fn_) + f64::from(counts.fp) + cfg.epsilon)
}

/// Base correctness: `alpha * S_pod + (1 - alpha) * F_beta + delta * [TP > 0]`.
pub fn r_base(counts: &MatchCounts, cfg: &RewardConfig) -> f64 {
    let bonus = if counts.tp > 0 { cfg.delta } else { 0.0 };
    cfg.alpha * s_pod(counts, cfg) + (1.0 - cfg.alpha) * f_beta(counts, cfg) + bonus
}

/// Correctness with the thresholded false-negative penalty:
/// `R_base - d * max(0, FN - tau_fn)`. Reduces to the base reward whenever
/// `FN <= tau_fn`.
pub fn r_result(counts: &MatchCounts, cfg: &RewardConfig) -> f64 {
    let excess = f64::from(counts.fn_.saturating_sub(cfg.tau_fn));
    r_base(counts, cfg) - cfg.d * excess
}

/// Format score: minus the fraction of failed checks, in [-1, 0].
pub fn r_format(c_total: u32, c_invalid: u32) -> Result<f64, RewardError> {
    if c_total == 0 {
        return Err(RewardError::ZeroChecks);
    }
    if c_invalid > c_total {
        return Err(RewardError::TooManyInvalid { invalid: c_invalid, total: c_total });
    }
    Ok(-(f64::from(c_invalid) / f64::from(c_total)))
}

/// Piecewise-linear length shaping: zero up to `l_min`, linear down to -1 at
/// `l_max`, and -1 beyond. Applied only to correct answers.
pub fn r_length(length: u32, correct: bool, cfg: &RewardConfig) -> f64 {
    if !correct {
        return 0.0;
    }
    if length <= cfg.l_min {
        0.0
    } else if length >= cfg.l_max {
        -1.0
    } else {
        -(f64::from(length - cfg.l_min) / f64::from(cfg.l_max - cfg.l_min))
    }
}

/// KL regularizer from aligned per-token log-likelihood sequences:
/// `-beta_kl * mean_t(logp_new[t] - logp_old[t])`. The per-sequence sample
/// estimate can be negative; the sign convention is that positive drift away
/// from the reference is penalized.
pub fn r_kl(logp_new: &[f64], logp_old: &[f64], cfg: &RewardConfig) -> Result<f64, RewardError> {
    if logp_new.len() != logp_old.len() {
        return Err(RewardError::LengthMismatch {
            new_len: logp_new.len(),
            old_len: logp_old.len(),
        });
    }
    if logp_new.is_empty() {
        return Ok(0.0);
    }
    let mean_drift: f64 = logp_new
        .iter()
        .zip(logp_old)
        .map(|(n, o)| n - o)
        .sum::<f64>()
        / logp_new.len() as f64;
    Ok(-cfg.beta_kl * mean_drift)
}

/// KL regularizer from an exact divergence value (available when the backend
/// exposes full per-step distributions).
pub fn r_kl_from_divergence(divergence: f64, cfg: &RewardConfig) -> f64 {
    -cfg.beta_kl * divergence
}

/// Composes the full per-sample breakdown. The correctness indicator for the
/// length term is `TP > 0`, matching the base-reward bonus.
pub fn score_sample(
    predicted: &TruthSet,
    truth: &TruthSet,
    c_total: u32,
    c_invalid: u32,
    reasoning_len: u32,
    kl_value: f64,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let counts = match_counts(predicted, truth);
    let s_pod_v = s_pod(&counts, cfg);
    let f_beta_v = f_beta(&counts, cfg);
    let r_base_v = r_base(&counts, cfg);
    let r_result_v = r_result(&counts, cfg);
    let r_format_v = r_format(c_total, c_invalid)?;
    let r_length_v = r_length(reasoning_len, counts.tp > 0, cfg);
    let r_kl_v = r_kl_from_divergence(kl_value, cfg);
    Ok(RewardBreakdown {
        s_pod: s_pod_v,
        f_beta: f_beta_v,
        r_base: r_base_v,
        r_result: r_result_v,
        r_format: r_format_v,
        r_length: r_length_v,
        r_kl: r_kl_v,
        r_total: r_result_v + r_format_v + r_length_v + r_kl_v,
    })
}

/// One evaluation case for the aggregate root-cause metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RcaCase {
    pub predicted: TruthSet,
    /// The single most confident prediction, if any.
    pub top1: Option<(crate::sim::ServiceId, crate::sim::Resource)>,
    pub truth: TruthSet,
}

/// Aggregate precision/recall over full predicted sets plus top-1 accuracy.
///
/// Precision with zero predictions is reported as zero (the undefined case is
/// flagged by callers that care); a case with empty truth counts as accurate
/// exactly when no top-1 prediction is made.
pub fn rca_metrics(cases: &[RcaCase]) -> (f64, f64, f64) {
    assert!(!cases.is_empty(), "rca_metrics needs at least one case");
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    let mut accurate = 0u64;
    for case in cases {
        let counts = match_counts(&case.predicted, &case.truth);
        tp += u64::from(counts.tp);
        fp += u64::from(counts.fp);
        fn_ += u64::from(counts.fn_);
        let hit = match case.top1 {
            Some(label) => case.truth.contains(&label),
            None => case.truth.is_empty(),
        };
        if hit {
            accurate += 1;
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let accuracy = accurate as f64 / cases.len() as f64;
    (precision, recall, accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Resource, ServiceId};

    fn set(pairs: &[(u32, Resource)]) -> TruthSet {
        pairs.iter().map(|&(s, r)| (ServiceId(s), r)).collect()
    }

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    #[test]
    fn default_config_is_valid() {
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn match_counts_empty_sets() {
        let c = match_counts(&TruthSet::new(), &TruthSet::new());
        assert_eq!(c, MatchCounts::default());
    }

    #[test]
    fn match_counts_right_pod_wrong_resource() {
        let c = match_counts(&set(&[(4, Resource::Cpu)]), &set(&[(4, Resource::Memory)]));
        assert_eq!((c.tp, c.fp, c.fn_, c.pod_match, c.pod_not), (0, 1, 1, 1, 0));
    }

    #[test]
    fn match_counts_identity() {
        let both = set(&[(2, Resource::Cpu), (7, Resource::Network)]);
        let c = match_counts(&both, &both);
        assert_eq!((c.tp, c.fp, c.fn_, c.pod_match, c.pod_not), (2, 0, 0, 2, 0));
    }

    #[test]
    fn s_pod_examples() {
        let zero = MatchCounts::default();
        assert_eq!(s_pod(&zero, &cfg()), 0.0);

        let c = MatchCounts { pod_match: 3, pod_not: 1, ..Default::default() };
        let got = s_pod(&c, &cfg());
        assert!((got - 0.749999998125).abs() < 1e-12, "{got}");

        let c = MatchCounts { pod_match: 5, pod_not: 0, ..Default::default() };
        let got = s_pod(&c, &cfg());
        assert!(got < 1.0 && got > 0.999999);
    }

    #[test]
    fn f_beta_examples() {
        let zero = MatchCounts::default();
        assert_eq!(f_beta(&zero, &cfg()), 0.0);

        let c = MatchCounts { tp: 2, fn_: 1, fp: 1, ..Default::default() };
        let got = f_beta(&c, &cfg());
        assert!((got - 10.0 / 15.0).abs() < 1e-8, "{got}");
    }

    #[test]
    fn f_beta_weights_fn_over_fp() {
        let more_fn = MatchCounts { tp: 2, fn_: 1, fp: 0, ..Default::default() };
        let more_fp = MatchCounts { tp: 2, fn_: 0, fp: 1, ..Default::default() };
        assert!(f_beta(&more_fn, &cfg()) < f_beta(&more_fp, &cfg()));
    }

    #[test]
    fn r_result_examples() {
        assert_eq!(r_result(&MatchCounts::default(), &cfg()), 0.0);

        // At the tolerance threshold the penalty is inactive.
        let c = MatchCounts { tp: 1, fn_: 2, fp: 0, pod_match: 1, pod_not: 0 };
        assert_eq!(r_result(&c, &cfg()), r_base(&c, &cfg()));

        let c = MatchCounts { tp: 2, fn_: 1, fp: 1, pod_match: 2, pod_not: 0 };
        let got = r_result(&c, &cfg());
        let expect = 0.05 * s_pod(&c, &cfg()) + 0.95 * f_beta(&c, &cfg()) + 0.1;
        assert_eq!(got, expect);
        assert!((got - 0.7833).abs() < 1e-4, "{got}");
    }

    #[test]
    fn r_result_reduction_exhaustive() {
        let cfg = cfg();
        for tp in 0..=10u32 {
            for fp in 0..=10u32 {
                for fn_ in 0..=cfg.tau_fn {
                    let c = MatchCounts { tp, fp, fn_, pod_match: tp.min(1), pod_not: 0 };
                    assert_eq!(r_result(&c, &cfg), r_base(&c, &cfg));
                }
            }
        }
    }

    #[test]
    fn r_result_monotonicity_sweep() {
        let cfg = cfg();
        let eval = |tp, fp, fn_| {
            r_result(&MatchCounts { tp, fp, fn_, pod_match: 0, pod_not: 0 }, &cfg)
        };
        for tp in 0..10u32 {
            for fp in 0..10u32 {
                for fn_ in 0..10u32 {
                    assert!(eval(tp + 1, fp, fn_) >= eval(tp, fp, fn_) - 1e-15);
                    assert!(eval(tp, fp + 1, fn_) <= eval(tp, fp, fn_) + 1e-15);
                    assert!(eval(tp, fp, fn_ + 1) <= eval(tp, fp, fn_) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn r_format_range_and_errors() {
        assert_eq!(r_format(12, 0).unwrap(), 0.0);
        assert_eq!(r_format(12, 12).unwrap(), -1.0);
        assert_eq!(r_format(12, 3).unwrap(), -0.25);
        assert!(r_format(0, 0).is_err());
        assert!(r_format(12, 13).is_err());
    }

    #[test]
    fn r_length_piecewise() {
        let cfg = cfg();
        assert_eq!(r_length(cfg.l_min, true, &cfg), 0.0);
        assert_eq!(r_length(0, true, &cfg), 0.0);
        assert_eq!(r_length((cfg.l_min + cfg.l_max) / 2, true, &cfg), -0.5);
        assert_eq!(r_length(cfg.l_max, true, &cfg), -1.0);
        assert_eq!(r_length(cfg.l_max + 500, true, &cfg), -1.0);
        for len in [0, cfg.l_min, 200, cfg.l_max, 5000] {
            assert_eq!(r_length(len, false, &cfg), 0.0);
        }
    }

    #[test]
    fn r_length_non_increasing_when_correct() {
        let cfg = cfg();
        let mut last = 0.0;
        for len in 0..2000u32 {
            let v = r_length(len, true, &cfg);
            assert!(v <= last + 1e-15);
            last = v;
        }
    }

    #[test]
    fn r_kl_examples() {
        let cfg = cfg();
        let same = vec![-1.0; 10];
        assert_eq!(r_kl(&same, &same, &cfg).unwrap(), 0.0);

        let zero_beta = RewardConfig { beta_kl: 0.0, ..cfg };
        let drifted: Vec<f64> = same.iter().map(|x| x + 0.1).collect();
        assert_eq!(r_kl(&drifted, &same, &zero_beta).unwrap(), 0.0);

        let got = r_kl(&drifted, &same, &cfg).unwrap();
        assert!((got - (-0.001)).abs() < 1e-12, "{got}");

        assert!(r_kl(&same, &same[..5], &cfg).is_err());
    }

    #[test]
    fn total_is_exact_component_sum() {
        let cfg = cfg();
        let truth = set(&[(2, Resource::Cpu), (7, Resource::Network)]);
        let predicted = set(&[(2, Resource::Cpu), (3, Resource::Memory)]);
        let b = score_sample(&predicted, &truth, 12, 3, 100, 0.05, &cfg).unwrap();
        assert_eq!(b.r_total, b.r_result + b.r_format + b.r_length + b.r_kl);
        assert!((b.r_format - (-0.25)).abs() < 1e-15);
    }

    #[test]
    fn rca_metrics_examples() {
        let perfect = vec![RcaCase {
            predicted: set(&[(4, Resource::Cpu)]),
            top1: Some((ServiceId(4), Resource::Cpu)),
            truth: set(&[(4, Resource::Cpu)]),
        }];
        assert_eq!(rca_metrics(&perfect), (1.0, 1.0, 1.0));

        let partial = vec![RcaCase {
            predicted: set(&[(4, Resource::Cpu)]),
            top1: Some((ServiceId(4), Resource::Cpu)),
            truth: set(&[(4, Resource::Cpu), (2, Resource::Memory)]),
        }];
        let (p, r, a) = rca_metrics(&partial);
        assert_eq!((p, r, a), (1.0, 0.5, 1.0));

        let empty_truth_no_guess = vec![RcaCase {
            predicted: TruthSet::new(),
            top1: None,
            truth: TruthSet::new(),
        }];
        let (p, r, a) = rca_metrics(&empty_truth_no_guess);
        assert_eq!((p, r, a), (0.0, 0.0, 1.0));
    }

    #[test]
    fn brute_force_match_counts_agree() {
        use crate::rng::XorShift64;
        let mut rng = XorShift64::new(0xfeed);
        let resources = [Resource::Cpu, Resource::Disk, Resource::Memory, Resource::Network];
        for _ in 0..1000 {
            let mut predicted = TruthSet::new();
            let mut truth = TruthSet::new();
            for _ in 0..rng.next_bounded(6) {
                predicted.insert((
                    ServiceId(1 + rng.next_bounded(8) as u32),
                    resources[rng.next_usize(4)],
                ));
            }
            for _ in 0..rng.next_bounded(6) {
                truth.insert((
                    ServiceId(1 + rng.next_bounded(8) as u32),
                    resources[rng.next_usize(4)],
                ));
            }
            // Independent double-loop counter.
            let mut tp = 0u32;
            let mut fp = 0u32;
            for p in &predicted {
                if truth.iter().any(|t| t == p) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
            let mut fn_ = 0u32;
            for t in &truth {
                if !predicted.iter().any(|p| p == t) {
                    fn_ += 1;
                }
            }
            let mut pod_match = 0u32;
            let mut pod_not = 0u32;
            let pred_services: std::collections::BTreeSet<_> =
                predicted.iter().map(|(s, _)| s.0).collect();
            for s in &pred_services {
                if truth.iter().any(|(t, _)| t.0 == *s) {
                    pod_match += 1;
                } else {
                    pod_not += 1;
                }
            }
            let got = match_counts(&predicted, &truth);
            assert_eq!((got.tp, got.fp, got.fn_, got.pod_match, got.pod_not),
                       (tp, fp, fn_, pod_match, pod_not));
        }
    }
}
